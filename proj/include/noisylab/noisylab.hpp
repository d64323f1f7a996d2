#pragma once

#include "noisylab/analysis.hpp"
#include "noisylab/errors.hpp"
#include "noisylab/experiment.hpp"
#include "noisylab/noise_model.hpp"
#include "noisylab/oracle.hpp"
#include "noisylab/rng.hpp"
#include "noisylab/selection.hpp"
#include "noisylab/synthetic_data.hpp"
#include "noisylab/trainer.hpp"
#include "noisylab/weighted_ssl.hpp"
