#pragma once

#include "prospector/attack_detection.hpp"
#include "prospector/counter_backend.hpp"
#include "prospector/event_space.hpp"
#include "prospector/hidden_collector.hpp"
#include "prospector/instruction_corpus.hpp"
#include "prospector/reporting.hpp"
#include "prospector/side_channel.hpp"
#include "prospector/umask_analysis.hpp"
#include "prospector/sim_presets.hpp"
