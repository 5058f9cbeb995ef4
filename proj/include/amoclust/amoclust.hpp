#pragma once

#include <amoclust/autodiff/gradcheck.hpp>
#include <amoclust/autodiff/tensor.hpp>
#include <amoclust/eval/baselines.hpp>
#include <amoclust/eval/harness.hpp>
#include <amoclust/gradcheck_suite.hpp>
#include <amoclust/io/checkpoint.hpp>
#include <amoclust/io/config.hpp>
#include <amoclust/io/dataset_io.hpp>
#include <amoclust/metrics/partition.hpp>
#include <amoclust/metrics/soft.hpp>
#include <amoclust/model/cin.hpp>
#include <amoclust/model/layers.hpp>
#include <amoclust/model/pin.hpp>
#include <amoclust/parallel.hpp>
#include <amoclust/prior/gmm.hpp>
#include <amoclust/prior/preprocess.hpp>
#include <amoclust/prior/types.hpp>
#include <amoclust/prior/zeus.hpp>
#include <amoclust/rng.hpp>
#include <amoclust/train/optim.hpp>
#include <amoclust/train/trainer.hpp>
