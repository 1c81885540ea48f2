#pragma once

#include "mobclip/errors.hpp"
#include "mobclip/random.hpp"
#include "mobclip/binary_io.hpp"
#include "mobclip/hexgrid.hpp"
#include "mobclip/embedding.hpp"
#include "mobclip/graph.hpp"
#include "mobclip/alias.hpp"
#include "mobclip/line.hpp"
#include "mobclip/lightgcn.hpp"
#include "mobclip/nn.hpp"
#include "mobclip/align.hpp"
#include "mobclip/probe.hpp"
#include "mobclip/distill.hpp"
#include "mobclip/synth.hpp"
#include "mobclip/config.hpp"
