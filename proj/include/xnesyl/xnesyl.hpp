#pragma once

#include "xnesyl/error.hpp"
#include "xnesyl/kg.hpp"
#include "xnesyl/datagen.hpp"
#include "xnesyl/percept.hpp"
#include "xnesyl/classify.hpp"
#include "xnesyl/shap.hpp"
#include "xnesyl/xai.hpp"
#include "xnesyl/train.hpp"
