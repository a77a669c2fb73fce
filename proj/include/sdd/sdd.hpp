#pragma once

#include "sdd/error.hpp"
#include "sdd/csv.hpp"
#include "sdd/table.hpp"
#include "sdd/dataset.hpp"
#include "sdd/rule.hpp"
#include "sdd/weight.hpp"
#include "sdd/data_view.hpp"
#include "sdd/scoring.hpp"
#include "sdd/brs.hpp"
#include "sdd/reservoir.hpp"
#include "sdd/sample.hpp"
#include "sdd/lp.hpp"
#include "sdd/allocation.hpp"
#include "sdd/session.hpp"
#include "sdd/tree_json.hpp"
