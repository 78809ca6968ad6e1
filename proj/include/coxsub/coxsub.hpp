#pragma once

#include "coxsub/cox_core.hpp"
#include "coxsub/csv.hpp"
#include "coxsub/errors.hpp"
#include "coxsub/parallel.hpp"
#include "coxsub/rng.hpp"
#include "coxsub/sampling.hpp"
#include "coxsub/serialize.hpp"
#include "coxsub/simulation.hpp"
#include "coxsub/stats.hpp"
#include "coxsub/subsampling.hpp"
#include "coxsub/survival_data.hpp"
#include "coxsub/weighted_cox.hpp"
