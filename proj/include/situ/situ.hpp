#pragma once

#include "situ/checkpoint.hpp"
#include "situ/crf.hpp"
#include "situ/data.hpp"
#include "situ/decode.hpp"
#include "situ/eval.hpp"
#include "situ/features.hpp"
#include "situ/models.hpp"
#include "situ/numeric/gradcheck.hpp"
#include "situ/rnn.hpp"
#include "situ/schema.hpp"
#include "situ/train.hpp"
