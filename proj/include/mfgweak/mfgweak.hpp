#pragma once

#include "mfgweak/bsde.hpp"
#include "mfgweak/common.hpp"
#include "mfgweak/fixedpoint.hpp"
#include "mfgweak/hamiltonian.hpp"
#include "mfgweak/measures.hpp"
#include "mfgweak/model.hpp"
#include "mfgweak/models/clipped_lq.hpp"
#include "mfgweak/models/flocking.hpp"
#include "mfgweak/models/gbm.hpp"
#include "mfgweak/models/price_impact.hpp"
#include "mfgweak/models/rank.hpp"
#include "mfgweak/nplayer.hpp"
#include "mfgweak/paths.hpp"
#include "mfgweak/simulate.hpp"
