#pragma once

#include "nbiot/config.hpp"
#include "nbiot/rng.hpp"
#include "nbiot/topology.hpp"
#include "nbiot/channel.hpp"
#include "nbiot/phy.hpp"
#include "nbiot/mac.hpp"
#include "nbiot/traffic.hpp"
#include "nbiot/engine.hpp"
#include "nbiot/metrics.hpp"
