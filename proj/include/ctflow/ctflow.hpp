#ifndef CTFLOW_CTFLOW_HPP
#define CTFLOW_CTFLOW_HPP

#include "ctflow/bench.hpp"
#include "ctflow/config.hpp"
#include "ctflow/core.hpp"
#include "ctflow/downsampling.hpp"
#include "ctflow/drift.hpp"
#include "ctflow/evaluator.hpp"
#include "ctflow/learner.hpp"
#include "ctflow/loader.hpp"
#include "ctflow/model_store.hpp"
#include "ctflow/reports.hpp"
#include "ctflow/selector.hpp"
#include "ctflow/storage.hpp"
#include "ctflow/supervisor.hpp"
#include "ctflow/synthetic.hpp"
#include "ctflow/trainer.hpp"

#endif  // CTFLOW_CTFLOW_HPP
