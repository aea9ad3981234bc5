#include "pert/retriever.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "pert/errors.hpp"

namespace pert {

using nlohmann::json;

double sim_dense(const std::vector<double>& q, const std::vector<double>& p) {
  if (q.size() != p.size()) {
    throw ShapeError("sim_dense: lengths differ: " + std::to_string(q.size()) + " vs " +
                     std::to_string(p.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) s += q[i] * p[i];
  return s;
}

double sim_maxsim(const TokenMatrix& q_toks, const TokenMatrix& d_toks) {
  if (q_toks.rows == 0 || d_toks.rows == 0) {
    throw UsageError("sim_maxsim: empty token matrix (documents always have at least one token)");
  }
  if (q_toks.cols != d_toks.cols) {
    throw ShapeError("sim_maxsim: embedding widths differ: " + std::to_string(q_toks.cols) +
                     " vs " + std::to_string(d_toks.cols));
  }
  const std::size_t d = q_toks.cols;
  double score = 0.0;
  for (std::size_t i = 0; i < q_toks.rows; ++i) {
    const double* q = q_toks.values.data() + i * d;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < d_toks.rows; ++j) {
      const double* dv = d_toks.values.data() + j * d;
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += q[c] * dv[c];
      best = std::max(best, acc);
    }
    score += best;
  }
  return score;
}

Tensor sim_dense_t(const Tensor& q_vec, const Tensor& p_vec) { return dot(q_vec, p_vec); }

Tensor sim_maxsim_t(const Tensor& q_toks, const Tensor& d_toks) {
  if (q_toks.rank() != 2 || d_toks.rank() != 2 || q_toks.dim(0) == 0 || d_toks.dim(0) == 0) {
    throw UsageError("sim_maxsim: both token matrices must be non-empty rank 2");
  }
  return sum_all(max_lastdim(matmul(q_toks, transpose(d_toks))));
}

Tensor nce_loss(const Tensor& pos_score, const Tensor& neg_scores) {
  if (pos_score.numel() != 1) {
    throw ShapeError("nce_loss: positive score must be scalar, got " +
                     shape_str(pos_score.shape()));
  }
  if (neg_scores.rank() != 1 || neg_scores.numel() == 0) {
    throw ShapeError("nce_loss: need at least one negative score, got " +
                     shape_str(neg_scores.shape()));
  }
  return sub(logsumexp(concat0(pos_score, neg_scores)), pos_score);
}

RetrieverKind retriever_kind_from_string(const std::string& name) {
  if (name == "dense") return RetrieverKind::Dense;
  if (name == "late") return RetrieverKind::Late;
  throw ConfigError("unknown retriever kind '" + name + "' (expected dense or late)");
}

const char* retriever_kind_name(RetrieverKind k) {
  return k == RetrieverKind::Dense ? "dense" : "late";
}

namespace {

void add_prefixed(ParamRegistry& unified, const std::string& prefix, const ParamRegistry& source,
                  bool skip_pe) {
  for (const auto& [path, t] : source.items()) {
    if (skip_pe && is_pe_path(path)) continue;
    unified.add(prefix + path, t);
  }
}

std::size_t clamped_text_len(const EncoderConfig& enc_cfg, const PEConfig& pe_cfg,
                             std::size_t requested) {
  std::size_t room = enc_cfg.max_seq_len;
  if (pe_cfg.method == PEMethod::InputPrompt) room -= std::min(room, pe_cfg.prompt_len);
  return std::min(requested, room);
}

}  // namespace

Retriever make_dense_retriever(const EncoderConfig& enc_cfg, const PEConfig& pe_cfg,
                               Vocabulary vocab, std::size_t text_max_len, Rng& rng) {
  Retriever r;
  r.kind = RetrieverKind::Dense;
  r.vocab = std::move(vocab);
  r.pe_method = pe_cfg.method;
  r.text_max_len = clamped_text_len(enc_cfg, pe_cfg, text_max_len);

  r.query_encoder.emplace(enc_cfg, rng);
  r.passage_encoder.emplace(enc_cfg, rng);

  if (pe_cfg.share_across_encoders) {
    PEState shared = make_pe_state(enc_cfg, pe_cfg, rng);
    attach_state(*r.query_encoder, pe_cfg, shared);
    attach_state(*r.passage_encoder, pe_cfg, shared);
    add_prefixed(r.registry, "q.", r.query_encoder->registry, /*skip_pe=*/true);
    add_prefixed(r.registry, "p.", r.passage_encoder->registry, /*skip_pe=*/true);
    for (const auto& [path, t] : shared.params) r.registry.add(path, t);
  } else {
    attach_state(*r.query_encoder, pe_cfg, make_pe_state(enc_cfg, pe_cfg, rng));
    attach_state(*r.passage_encoder, pe_cfg, make_pe_state(enc_cfg, pe_cfg, rng));
    add_prefixed(r.registry, "q.", r.query_encoder->registry, /*skip_pe=*/false);
    add_prefixed(r.registry, "p.", r.passage_encoder->registry, /*skip_pe=*/false);
  }
  return r;
}

Retriever make_late_retriever(const EncoderConfig& enc_cfg, const PEConfig& pe_cfg,
                              const LateInteractionConfig& li_cfg, Vocabulary vocab, Rng& rng) {
  if (li_cfg.d_emb == 0 || li_cfg.q_len < 2 || li_cfg.d_len < 2) {
    throw ConfigError("late retriever: d_emb must be positive and q_len/d_len at least 2");
  }
  const std::size_t prompt = pe_cfg.method == PEMethod::InputPrompt ? pe_cfg.prompt_len : 0;
  if (li_cfg.q_len + prompt > enc_cfg.max_seq_len || li_cfg.d_len + prompt > enc_cfg.max_seq_len) {
    throw ConfigError("late retriever: q_len/d_len plus prompt length exceed max_seq_len");
  }

  Retriever r;
  r.kind = RetrieverKind::Late;
  r.vocab = std::move(vocab);
  r.pe_method = pe_cfg.method;
  r.li = li_cfg;
  r.text_max_len = li_cfg.d_len;

  r.encoder.emplace(enc_cfg, rng);
  r.projection = Tensor::randn({enc_cfg.d_model, li_cfg.d_emb}, rng, 0.02, true);
  attach_state(*r.encoder, pe_cfg, make_pe_state(enc_cfg, pe_cfg, rng));
  add_prefixed(r.registry, "enc.", r.encoder->registry, /*skip_pe=*/false);
  r.registry.add("proj.w", r.projection);
  return r;
}

std::vector<int> late_query_ids(const std::string& text, const Vocabulary& vocab,
                                std::size_t q_len) {
  std::vector<int> ids = tokenize(text, vocab, q_len);
  ids.resize(q_len, Vocabulary::kQPad);
  return ids;
}

Tensor dense_query_embedding(const Retriever& r, const std::vector<int>& ids, Mode mode,
                             Rng* rng) {
  return encode(*r.query_encoder, ids, mode, rng).pooled;
}

Tensor dense_passage_embedding(const Retriever& r, const std::vector<int>& ids, Mode mode,
                               Rng* rng) {
  return encode(*r.passage_encoder, ids, mode, rng).pooled;
}

Tensor late_token_embeddings(const Retriever& r, const std::vector<int>& ids, Mode mode,
                             Rng* rng) {
  const Tensor hidden = encode(*r.encoder, ids, mode, rng).hidden;
  return l2_normalize_rows(matmul(hidden, r.projection));
}

namespace {

std::vector<double> pooled_eval(const EncoderModel& model, const std::vector<int>& ids) {
  NoGradGuard ng;
  return encode(model, ids, Mode::Eval).pooled.data();
}

}  // namespace

std::vector<double> embed_query_dense(const Retriever& r, const std::string& text) {
  return pooled_eval(*r.query_encoder, tokenize(text, r.vocab, r.text_max_len));
}

std::vector<double> embed_text_dense(const Retriever& r, const std::string& text) {
  return pooled_eval(*r.passage_encoder, tokenize(text, r.vocab, r.text_max_len));
}

TokenMatrix embed_query_late(const Retriever& r, const std::string& text) {
  NoGradGuard ng;
  const Tensor m =
      late_token_embeddings(r, late_query_ids(text, r.vocab, r.li.q_len), Mode::Eval, nullptr);
  return TokenMatrix{m.dim(0), m.dim(1), m.data()};
}

TokenMatrix embed_text_late(const Retriever& r, const std::string& text) {
  NoGradGuard ng;
  const Tensor m =
      late_token_embeddings(r, tokenize(text, r.vocab, r.li.d_len), Mode::Eval, nullptr);
  return TokenMatrix{m.dim(0), m.dim(1), m.data()};
}

std::vector<TrainingExample> load_training_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("training data: cannot open " + path);
  std::vector<TrainingExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("training data: line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!record.contains("query") || !record.contains("positive")) {
      throw IoError("training data: line " + std::to_string(line_no) +
                    ": record needs 'query' and 'positive'");
    }
    TrainingExample ex;
    ex.query = record.at("query").get<std::string>();
    ex.positive = record.at("positive").get<std::string>();
    if (record.contains("negatives")) {
      for (const auto& n : record.at("negatives")) ex.negatives.push_back(n.get<std::string>());
    }
    out.push_back(std::move(ex));
  }
  return out;
}

TrainingBatch make_batch(const Retriever& r, const std::vector<TrainingExample>& examples) {
  TrainingBatch batch;
  for (const TrainingExample& ex : examples) {
    if (r.kind == RetrieverKind::Dense) {
      batch.queries.push_back(tokenize(ex.query, r.vocab, r.text_max_len));
    } else {
      batch.queries.push_back(late_query_ids(ex.query, r.vocab, r.li.q_len));
    }
    batch.positives.push_back(tokenize(ex.positive, r.vocab, r.text_max_len));
    if (ex.negatives.empty()) {
      batch.hard_negatives.emplace_back(std::nullopt);
    } else {
      batch.hard_negatives.emplace_back(tokenize(ex.negatives.front(), r.vocab, r.text_max_len));
    }
  }
  return batch;
}

Tensor in_batch_loss(const TrainingBatch& batch, const Retriever& r, Mode mode, Rng* rng) {
  const std::size_t B = batch.queries.size();
  if (batch.positives.size() != B || batch.hard_negatives.size() != B) {
    throw ShapeError("in_batch_loss: queries/positives/hard_negatives sizes differ");
  }
  if (B == 0) throw ConfigError("in_batch_loss: empty batch");
  if (B == 1 && !batch.hard_negatives[0]) {
    throw ConfigError("in_batch_loss: batch of one with no hard negative has nothing to contrast");
  }

  const bool dense = r.kind == RetrieverKind::Dense;
  std::vector<Tensor> q_emb(B), p_emb(B);
  std::vector<std::optional<Tensor>> n_emb(B);
  for (std::size_t i = 0; i < B; ++i) {
    if (dense) {
      q_emb[i] = dense_query_embedding(r, batch.queries[i], mode, rng);
      p_emb[i] = dense_passage_embedding(r, batch.positives[i], mode, rng);
      if (batch.hard_negatives[i]) {
        n_emb[i] = dense_passage_embedding(r, *batch.hard_negatives[i], mode, rng);
      }
    } else {
      q_emb[i] = late_token_embeddings(r, batch.queries[i], mode, rng);
      p_emb[i] = late_token_embeddings(r, batch.positives[i], mode, rng);
      if (batch.hard_negatives[i]) {
        n_emb[i] = late_token_embeddings(r, *batch.hard_negatives[i], mode, rng);
      }
    }
  }

  const auto score = [&](const Tensor& q, const Tensor& p) {
    return dense ? sim_dense_t(q, p) : sim_maxsim_t(q, p);
  };

  std::vector<Tensor> losses;
  losses.reserve(B);
  for (std::size_t i = 0; i < B; ++i) {
    std::vector<Tensor> negs;
    for (std::size_t j = 0; j < B; ++j) {
      if (j != i) negs.push_back(score(q_emb[i], p_emb[j]));
    }
    if (n_emb[i]) negs.push_back(score(q_emb[i], *n_emb[i]));
    losses.push_back(nce_loss(score(q_emb[i], p_emb[i]), stack_scalars(negs)));
  }
  return mean_all(stack_scalars(losses));
}

}  // namespace pert
