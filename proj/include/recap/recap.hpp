#pragma once

#include "recap/context.hpp"
#include "recap/embedding_store.hpp"
#include "recap/errors.hpp"
#include "recap/metrics.hpp"
#include "recap/normalizer.hpp"
#include "recap/retrieval.hpp"
