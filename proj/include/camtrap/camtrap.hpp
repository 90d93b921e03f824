#pragma once

#include "camtrap/dataset.hpp"
#include "camtrap/diagnostics.hpp"
#include "camtrap/error.hpp"
#include "camtrap/evaluator.hpp"
#include "camtrap/formats.hpp"
#include "camtrap/geometry.hpp"
#include "camtrap/splitter.hpp"
