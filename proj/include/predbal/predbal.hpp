#pragma once

#include "predbal/balanced_learning.hpp"
#include "predbal/dataset.hpp"
#include "predbal/errors.hpp"
#include "predbal/evaluation.hpp"
#include "predbal/experiments.hpp"
#include "predbal/freq_model.hpp"
#include "predbal/hash.hpp"
#include "predbal/head_model.hpp"
#include "predbal/pipeline.hpp"
#include "predbal/rng.hpp"
#include "predbal/scorer.hpp"
#include "predbal/semantic_adjustment.hpp"
#include "predbal/synthetic.hpp"
#include "predbal/vocab.hpp"
