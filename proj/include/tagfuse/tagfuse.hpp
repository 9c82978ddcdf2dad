#pragma once

#include "tagfuse/common.hpp"
#include "tagfuse/collection.hpp"
#include "tagfuse/neighbors.hpp"
#include "tagfuse/estimators.hpp"
#include "tagfuse/fusion.hpp"
#include "tagfuse/evalkit.hpp"
#include "tagfuse/learning.hpp"
#include "tagfuse/pipeline.hpp"
