#pragma once

#include "saem/errors.hpp"
#include "saem/rng.hpp"
#include "saem/numeric.hpp"
#include "saem/dataset.hpp"
#include "saem/summary.hpp"
#include "saem/hazard.hpp"
#include "saem/model.hpp"
#include "saem/builtins.hpp"
#include "saem/config.hpp"
#include "saem/parallel.hpp"
#include "saem/engine.hpp"
#include "saem/conditional.hpp"
#include "saem/likelihood.hpp"
#include "saem/selection.hpp"
#include "saem/diagnostics.hpp"
#include "saem/uncertainty.hpp"
#include "saem/report.hpp"
#include "saem/simstudy.hpp"
