#pragma once

#include "sbm/config.hpp"
#include "sbm/diagnostics.hpp"
#include "sbm/ensemble.hpp"
#include "sbm/exit_measure.hpp"
#include "sbm/fft.hpp"
#include "sbm/finite_rate.hpp"
#include "sbm/infinite_rate.hpp"
#include "sbm/io.hpp"
#include "sbm/kernels.hpp"
#include "sbm/lattice.hpp"
#include "sbm/ledger.hpp"
#include "sbm/random.hpp"
#include "sbm/report.hpp"
#include "sbm/rescaling.hpp"
#include "sbm/runner.hpp"
#include "sbm/stats.hpp"
#include "sbm/suites.hpp"
#include "sbm/test_function.hpp"
