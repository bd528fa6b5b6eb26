#pragma once

#include "core.hpp"
#include "quadrature.hpp"
#include "graph.hpp"
#include "model.hpp"
#include "regularization.hpp"
#include "discretization.hpp"
#include "scenario.hpp"
#include "weak_stepper.hpp"
#include "strong_galerkin.hpp"
#include "diagnostics.hpp"
#include "io.hpp"
#include "pipeline.hpp"
