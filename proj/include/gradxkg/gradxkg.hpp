#pragma once

#include "gradxkg/errors.hpp"
#include "gradxkg/tensor.hpp"
#include "gradxkg/autodiff.hpp"
#include "gradxkg/rng.hpp"
#include "gradxkg/tkg.hpp"
#include "gradxkg/synth.hpp"
#include "gradxkg/rgcn.hpp"
#include "gradxkg/model.hpp"
#include "gradxkg/explain.hpp"
#include "gradxkg/eval.hpp"
#include "gradxkg/export.hpp"
#include "gradxkg/checkpoint.hpp"
#include "gradxkg/planted.hpp"
