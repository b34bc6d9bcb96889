#pragma once

#include "eaml/dataset.hpp"
#include "eaml/elicitation.hpp"
#include "eaml/error.hpp"
#include "eaml/evaluation.hpp"
#include "eaml/expert_fit.hpp"
#include "eaml/gbm.hpp"
#include "eaml/metrics.hpp"
#include "eaml/pipeline.hpp"
#include "eaml/rules.hpp"
#include "eaml/serialization.hpp"
#include "eaml/sparse_linear.hpp"
#include "eaml/stats.hpp"
#include "eaml/synthetic.hpp"
#include "eaml/workflow.hpp"
#include "eaml/elicit_service.hpp"
