#ifndef EHCPOOL_EHCPOOL_HPP
#define EHCPOOL_EHCPOOL_HPP

#include "ehcpool/autodiff.hpp"
#include "ehcpool/checkpoint.hpp"
#include "ehcpool/dataset_io.hpp"
#include "ehcpool/ecc_conv.hpp"
#include "ehcpool/ehc_pool.hpp"
#include "ehcpool/grad_check.hpp"
#include "ehcpool/graph.hpp"
#include "ehcpool/metrics.hpp"
#include "ehcpool/model.hpp"
#include "ehcpool/optim.hpp"
#include "ehcpool/synth.hpp"
#include "ehcpool/train.hpp"

#endif  // EHCPOOL_EHCPOOL_HPP
