#pragma once

// Umbrella header for the full engine: iterative reasoning with on-demand
// retrieval, entity-keyed knowledge aggregation, evaluation, and training
// data export.

#include "dualrag/core.hpp"
#include "dualrag/dataset.hpp"
#include "dualrag/errors.hpp"
#include "dualrag/llm.hpp"
#include "dualrag/metrics.hpp"
#include "dualrag/orchestrator.hpp"
#include "dualrag/pka.hpp"
#include "dualrag/prompts.hpp"
#include "dualrag/raq.hpp"
#include "dualrag/retrieval.hpp"
#include "dualrag/server.hpp"
#include "dualrag/sft.hpp"
#include "dualrag/text.hpp"
