#pragma once

#include "mrfinn/dictionary.hpp"
#include "mrfinn/errors.hpp"
#include "mrfinn/evaluation.hpp"
#include "mrfinn/fcn.hpp"
#include "mrfinn/features.hpp"
#include "mrfinn/gradcheck.hpp"
#include "mrfinn/inn.hpp"
#include "mrfinn/model.hpp"
#include "mrfinn/nn.hpp"
#include "mrfinn/seeding.hpp"
#include "mrfinn/sequence.hpp"
#include "mrfinn/svg.hpp"
#include "mrfinn/training.hpp"
