#pragma once

#include "basis.hpp"
#include "csv.hpp"
#include "diagnostics.hpp"
#include "error.hpp"
#include "fit.hpp"
#include "kselect.hpp"
#include "random.hpp"
#include "simulation.hpp"
#include "table.hpp"
