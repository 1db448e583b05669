#pragma once

#include "bilevel/dynamics.hpp"
#include "bilevel/experiment.hpp"
#include "bilevel/numerics.hpp"
#include "bilevel/problem.hpp"
#include "bilevel/problems.hpp"
#include "bilevel/reporting.hpp"
#include "bilevel/solver.hpp"
#include "bilevel/trajectory.hpp"
#include "bilevel/version.hpp"
