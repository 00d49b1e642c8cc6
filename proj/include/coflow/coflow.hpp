#pragma once

#include "coflow/core.hpp"
#include "coflow/events.hpp"
#include "coflow/harness.hpp"
#include "coflow/info_flow.hpp"
#include "coflow/midi.hpp"
#include "coflow/midi_writer.hpp"
#include "coflow/model.hpp"
#include "coflow/oracle.hpp"
