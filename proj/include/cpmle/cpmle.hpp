#pragma once

#include "cpmle/error.hpp"
#include "cpmle/rng.hpp"
#include "cpmle/dataset.hpp"
#include "cpmle/optimize.hpp"
#include "cpmle/family.hpp"
#include "cpmle/families.hpp"
#include "cpmle/parameters.hpp"
#include "cpmle/likelihood.hpp"
#include "cpmle/inference.hpp"
#include "cpmle/estimator.hpp"
#include "cpmle/parallel.hpp"
#include "cpmle/simulation.hpp"
#include "cpmle/verify.hpp"
#include "cpmle/io.hpp"
