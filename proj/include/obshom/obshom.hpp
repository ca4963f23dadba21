#pragma once

#include "obshom/error.hpp"
#include "obshom/grid.hpp"
#include "obshom/field_io.hpp"
#include "obshom/families.hpp"
#include "obshom/solver.hpp"
#include "obshom/corrector.hpp"
#include "obshom/geometry.hpp"
#include "obshom/experiments.hpp"
