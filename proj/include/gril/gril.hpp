#pragma once

// Everything, for tools and quick experiments.
#include "gril/errors.hpp"
#include "gril/numerics.hpp"
#include "gril/kg/knowledge_graph.hpp"
#include "gril/kg/embeddings.hpp"
#include "gril/retriever/retriever.hpp"
#include "gril/bridge/bridge.hpp"
#include "gril/reasoner/reasoner.hpp"
#include "gril/cam/cam.hpp"
#include "gril/training/supervision.hpp"
#include "gril/training/config.hpp"
#include "gril/training/engine.hpp"
#include "gril/eval/dataset.hpp"
#include "gril/eval/metrics.hpp"
#include "gril/eval/synthetic.hpp"
#include "gril/eval/timing.hpp"
