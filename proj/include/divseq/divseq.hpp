#pragma once

#include "divseq/core.hpp"
#include "divseq/diversity.hpp"
#include "divseq/embeddings.hpp"
#include "divseq/error.hpp"
#include "divseq/eval.hpp"
#include "divseq/lm_codec.hpp"
#include "divseq/ngram_lm.hpp"
#include "divseq/scorers.hpp"
#include "divseq/search.hpp"
