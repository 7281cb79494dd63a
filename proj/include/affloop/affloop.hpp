#pragma once

#include "affloop/affect.hpp"
#include "affloop/affect_engine.hpp"
#include "affloop/catalog.hpp"
#include "affloop/error.hpp"
#include "affloop/features.hpp"
#include "affloop/kv_config.hpp"
#include "affloop/loop_engine.hpp"
#include "affloop/player_sim.hpp"
#include "affloop/plot.hpp"
#include "affloop/serve.hpp"
#include "affloop/signal_model.hpp"
#include "affloop/text.hpp"
