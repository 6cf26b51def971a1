#pragma once

#include "vfrpool/archive.hpp"
#include "vfrpool/audio.hpp"
#include "vfrpool/core.hpp"
#include "vfrpool/dsp.hpp"
#include "vfrpool/eval.hpp"
#include "vfrpool/model_io.hpp"
#include "vfrpool/network.hpp"
#include "vfrpool/pooling.hpp"
#include "vfrpool/synth.hpp"
#include "vfrpool/trainer.hpp"
#include "vfrpool/vfr.hpp"
