#pragma once

#include "mud/channel.hpp"
#include "mud/detector.hpp"
#include "mud/estimators.hpp"
#include "mud/fec.hpp"
#include "mud/harness.hpp"
#include "mud/rng.hpp"
#include "mud/waveform.hpp"
