#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pert/peft.hpp"

namespace pert {

// ---------------------------------------------------------------------------
// Scoring primitives
// ---------------------------------------------------------------------------

/// Inner product, no normalization.
double sim_dense(const std::vector<double>& q, const std::vector<double>& p);

/// Row-major token-embedding matrix produced by the late-interaction head.
struct TokenMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// Sum over query tokens of the maximum dot product against document tokens.
/// Single pass with a running maximum; tests hold it against a naive triple
/// loop. Both sides must be non-empty.
double sim_maxsim(const TokenMatrix& q_toks, const TokenMatrix& d_toks);

/// Differentiable counterparts used by the training path.
Tensor sim_dense_t(const Tensor& q_vec, const Tensor& p_vec);
Tensor sim_maxsim_t(const Tensor& q_toks, const Tensor& d_toks);

/// -log(e^pos / (e^pos + sum_j e^neg_j)), via log-sum-exp.
Tensor nce_loss(const Tensor& pos_score, const Tensor& neg_scores);

// ---------------------------------------------------------------------------
// Retriever models
// ---------------------------------------------------------------------------

struct LateInteractionConfig {
  std::size_t d_emb = 128;  // projection width
  std::size_t q_len = 32;   // fixed query length, padded with [QPAD]
  std::size_t d_len = 300;  // document truncation length
};

enum class RetrieverKind { Dense, Late };

RetrieverKind retriever_kind_from_string(const std::string& name);
const char* retriever_kind_name(RetrieverKind k);

/// Dense dual encoder (separate query/passage instances) or late-interaction
/// model (one shared encoder plus a linear projection, token embeddings
/// L2-normalized). The unified registry prefixes paths with "q." / "p."
/// (dense) or "enc." (late); PE parameters shared across encoders register
/// once under "pe.".
struct Retriever {
  RetrieverKind kind = RetrieverKind::Dense;
  Vocabulary vocab;
  std::size_t text_max_len = 256;  // token budget for dense queries and all documents

  // dense
  std::optional<EncoderModel> query_encoder;
  std::optional<EncoderModel> passage_encoder;

  // late
  std::optional<EncoderModel> encoder;
  Tensor projection;  // [d_model x d_emb]
  LateInteractionConfig li;

  ParamRegistry registry;
  PEMethod pe_method = PEMethod::FineTune;
};

Retriever make_dense_retriever(const EncoderConfig& enc_cfg, const PEConfig& pe_cfg,
                               Vocabulary vocab, std::size_t text_max_len, Rng& rng);
Retriever make_late_retriever(const EncoderConfig& enc_cfg, const PEConfig& pe_cfg,
                              const LateInteractionConfig& li_cfg, Vocabulary vocab, Rng& rng);

/// Query ids padded with [QPAD] to exactly q_len (ColBERT-style query
/// augmentation: the pad tokens attend and score).
std::vector<int> late_query_ids(const std::string& text, const Vocabulary& vocab,
                                std::size_t q_len);

// Differentiable embedding paths (training).
Tensor dense_query_embedding(const Retriever& r, const std::vector<int>& ids, Mode mode, Rng* rng);
Tensor dense_passage_embedding(const Retriever& r, const std::vector<int>& ids, Mode mode,
                               Rng* rng);
Tensor late_token_embeddings(const Retriever& r, const std::vector<int>& ids, Mode mode, Rng* rng);

// Plain-double embedding paths (indexing and search; eval mode, no graph).
std::vector<double> embed_query_dense(const Retriever& r, const std::string& text);
std::vector<double> embed_text_dense(const Retriever& r, const std::string& text);
TokenMatrix embed_query_late(const Retriever& r, const std::string& text);
TokenMatrix embed_text_late(const Retriever& r, const std::string& text);

// ---------------------------------------------------------------------------
// Training data and the in-batch objective
// ---------------------------------------------------------------------------

struct TrainingExample {
  std::string query;
  std::string positive;
  std::vector<std::string> negatives;  // the first entry is the hard-negative slot
};

/// JSON-lines {query, positive, negatives:[...]}; errors carry line numbers.
std::vector<TrainingExample> load_training_file(const std::string& path);

struct TrainingBatch {
  std::vector<std::vector<int>> queries;
  std::vector<std::vector<int>> positives;
  std::vector<std::optional<std::vector<int>>> hard_negatives;  // one slot per query
};

TrainingBatch make_batch(const Retriever& r, const std::vector<TrainingExample>& examples);

/// Mean over queries of nce_loss with the other queries' positives (plus the
/// query's hard negative, if any) as negatives. Batch size 1 needs a hard
/// negative; otherwise there is nothing to contrast against.
Tensor in_batch_loss(const TrainingBatch& batch, const Retriever& r, Mode mode, Rng* rng);

}  // namespace pert
