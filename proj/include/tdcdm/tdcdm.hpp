#pragma once

#include "tdcdm/diagnostics.hpp"
#include "tdcdm/draws.hpp"
#include "tdcdm/error.hpp"
#include "tdcdm/io.hpp"
#include "tdcdm/metrics.hpp"
#include "tdcdm/model.hpp"
#include "tdcdm/priors.hpp"
#include "tdcdm/rng.hpp"
#include "tdcdm/sampler.hpp"
#include "tdcdm/simulator.hpp"
#include "tdcdm/study.hpp"
#include "tdcdm/text_signal.hpp"
