#pragma once

#include "vibound/counterexamples.hpp"
#include "vibound/datasets.hpp"
#include "vibound/experiment.hpp"
#include "vibound/gauss_math.hpp"
#include "vibound/model.hpp"
#include "vibound/objectives.hpp"
#include "vibound/pac_bayes.hpp"
#include "vibound/random.hpp"
#include "vibound/stability.hpp"
#include "vibound/trainer.hpp"
