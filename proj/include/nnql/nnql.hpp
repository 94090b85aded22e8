#pragma once

#include "nnql/state.hpp"
#include "nnql/mdp.hpp"
#include "nnql/envs.hpp"
#include "nnql/knn_index.hpp"
#include "nnql/offline.hpp"
#include "nnql/online.hpp"
#include "nnql/oracle.hpp"
#include "nnql/metrics.hpp"
#include "nnql/io.hpp"
#include "nnql/experiment.hpp"
