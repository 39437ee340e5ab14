#pragma once

#include "blindrep/cli.hpp"
#include "blindrep/config.hpp"
#include "blindrep/dataset.hpp"
#include "blindrep/errors.hpp"
#include "blindrep/fairness.hpp"
#include "blindrep/forest.hpp"
#include "blindrep/gradcheck.hpp"
#include "blindrep/losses.hpp"
#include "blindrep/matrix.hpp"
#include "blindrep/metrics.hpp"
#include "blindrep/net.hpp"
#include "blindrep/optim.hpp"
#include "blindrep/pipeline.hpp"
#include "blindrep/probes.hpp"
#include "blindrep/rng.hpp"
#include "blindrep/suppression.hpp"
