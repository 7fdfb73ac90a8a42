#pragma once

#include "attn_sieve/cleaner.hpp"
#include "attn_sieve/entropy.hpp"
#include "attn_sieve/error.hpp"
#include "attn_sieve/layer_select.hpp"
#include "attn_sieve/metrics.hpp"
#include "attn_sieve/mixture.hpp"
#include "attn_sieve/simulator.hpp"
#include "attn_sieve/tensor_store.hpp"
