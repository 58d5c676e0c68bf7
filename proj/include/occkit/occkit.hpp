#pragma once

#include "occkit/augment.hpp"
#include "occkit/config.hpp"
#include "occkit/det2occ.hpp"
#include "occkit/ensemble.hpp"
#include "occkit/error.hpp"
#include "occkit/grid.hpp"
#include "occkit/head/gradcheck.hpp"
#include "occkit/head/model.hpp"
#include "occkit/io.hpp"
#include "occkit/metrics.hpp"
#include "occkit/selfcheck.hpp"
#include "occkit/version.hpp"
