#pragma once

// Explains a label's deviation from the sample mean or a distribution mode:
// Bayesian MAP inversion for the reference features, ANOVA decomposition of
// the deviation, responsible scores and interventional Shapley values.

#include "devexplain/anova.hpp"
#include "devexplain/attribution.hpp"
#include "devexplain/dataset.hpp"
#include "devexplain/errors.hpp"
#include "devexplain/inverse.hpp"
#include "devexplain/matrix.hpp"
#include "devexplain/mixtures.hpp"
#include "devexplain/models.hpp"
#include "devexplain/optimize.hpp"
#include "devexplain/rng.hpp"
#include "devexplain/svg.hpp"
