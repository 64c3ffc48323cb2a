#pragma once

#include "kkl/interval_core.hpp"
#include "kkl/polynomial.hpp"
#include "kkl/plant.hpp"
#include "kkl/coord_change.hpp"
#include "kkl/kkl_transform.hpp"
#include "kkl/observer.hpp"
#include "kkl/harness.hpp"
