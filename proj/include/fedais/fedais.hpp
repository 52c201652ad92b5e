// Umbrella header.
#pragma once

#include "fedais/common.hpp"
#include "fedais/cost_metrics.hpp"
#include "fedais/embedding_store.hpp"
#include "fedais/experiment.hpp"
#include "fedais/graph.hpp"
#include "fedais/matrix.hpp"
#include "fedais/model.hpp"
#include "fedais/orchestrator.hpp"
#include "fedais/rng.hpp"
#include "fedais/sampler.hpp"
#include "fedais/scheduler.hpp"
