#pragma once

#include "sliceops/client.hpp"
#include "sliceops/config.hpp"
#include "sliceops/ddqn.hpp"
#include "sliceops/env_gnb.hpp"
#include "sliceops/harness.hpp"
#include "sliceops/mlp.hpp"
#include "sliceops/registry.hpp"
#include "sliceops/service.hpp"
#include "sliceops/shap.hpp"
#include "sliceops/xrl_reward.hpp"
