#pragma once

#include "klagg/aggregators.hpp"
#include "klagg/concentration.hpp"
#include "klagg/design.hpp"
#include "klagg/errors.hpp"
#include "klagg/family.hpp"
#include "klagg/harness.hpp"
#include "klagg/minimax.hpp"
#include "klagg/objective.hpp"
#include "klagg/rng.hpp"
#include "klagg/solvers.hpp"
