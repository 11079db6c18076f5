// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "vfc/ops.hpp"

namespace vfc {

// ---------------------------------------------------------------------------
// classifier spec and partition types

struct StageSpec {
  int blocks;
  int channels;
  int stride; // stride of the stage's first block
};

struct ClassifierSpec {
  int in_channels = 3;
  int image_hw = 32;
  int num_classes = 8;
  // ResNet-50's stage layout at toy width
  std::vector<StageSpec> stages = {{3, 16, 1}, {4, 32, 2}, {6, 64, 2}, {3, 128, 2}};
};

// A contiguous run of residual blocks treated as one split unit, with the
// feature shape produced at its output.
struct ConvxGroup {
  std::vector<int> block_ids; // indices into the flattened block list
  int64_t channels = 0, height = 0, width = 0;
};

struct PartitionPlan {
  std::vector<ConvxGroup> groups;
  int total_blocks = 0;

  int size() const { return static_cast<int>(groups.size()); }
};

struct SplitConfig {
  int k = 1;              // groups on the edge
  int edge_blocks = 0;    // residual blocks in the edge front-end
  int64_t channels = 0, height = 0, width = 0; // split-point feature shape
};

// Grouping rule: a stage with L >= 2 blocks emits one group of 3 first iff L
// is odd, then groups of 2; a stage with L < 2 is its own group. For stage
// sizes [3,4,6,3] this yields [3],[2,2],[2,2,2],[3] and N = 7.
inline std::vector<std::vector<int>> partition_stage_sizes(const std::vector<int>& stages) {
  std::vector<std::vector<int>> out;
  for (int L : stages) {
    if (L < 1) throw ConfigError("partition: every stage needs >= 1 block");
    if (L < 2) {
      out.push_back({L});
      continue;
    }
    std::vector<int> sizes;
    int rest = L;
    if (L % 2 == 1) {
      sizes.push_back(3);
      rest -= 3;
    }
    for (; rest > 0; rest -= 2) sizes.push_back(2);
    out.push_back(std::move(sizes));
  }
  return out;
}

// ---------------------------------------------------------------------------
// residual classifier

// Basic two-conv residual block (3x3 GeLU, no norm); 1x1 projection shortcut
// when shape changes. Second conv zero-initialized.
template <class T>
struct ResidualBlock {
  Tensor<T> w1, b1, w2, b2;
  Tensor<T> wsc, bsc; // defined only when projecting
  int stride = 1;
  int in_ch = 0, out_ch = 0;

  void init(int cin, int cout, int s, Rng& rng) {
    in_ch = cin;
    out_ch = cout;
    stride = s;
    w1 = Tensor<T>::zeros({3, 3, cin, cout});
    he_normal_init(w1, 9 * cin, rng);
    b1 = Tensor<T>::zeros({cout});
    w2 = Tensor<T>::zeros({3, 3, cout, cout}); // zero init
    b2 = Tensor<T>::zeros({cout});
    if (s != 1 || cin != cout) {
      wsc = Tensor<T>::zeros({1, 1, cin, cout});
      he_normal_init(wsc, cin, rng);
      bsc = Tensor<T>::zeros({cout});
    }
    for (auto* t : {&w1, &b1, &w2, &b2}) t->set_requires_grad();
    if (wsc.defined()) {
      wsc.set_requires_grad();
      bsc.set_requires_grad();
    }
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    auto h = gelu(conv2d(x, w1, b1, stride, 1));
    h = conv2d(h, w2, b2, 1, 1);
    auto sc = wsc.defined() ? conv2d(x, wsc, bsc, stride, 0) : x;
    return gelu(add(h, sc));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".conv1.weight", w1});
    out.push_back({prefix + ".conv1.bias", b1});
    out.push_back({prefix + ".conv2.weight", w2});
    out.push_back({prefix + ".conv2.bias", b2});
    if (wsc.defined()) {
      out.push_back({prefix + ".shortcut.weight", wsc});
      out.push_back({prefix + ".shortcut.bias", bsc});
    }
  }
};

template <class T>
struct Classifier {
  ClassifierSpec spec;
  Tensor<T> stem_w, stem_b;
  std::vector<ResidualBlock<T>> blocks;
  std::vector<std::string> block_names;
  Tensor<T> head_w, head_b;

  void init(const ClassifierSpec& s, Rng& rng) {
    spec = s;
    const int c0 = s.stages.empty() ? s.in_channels : s.stages[0].channels;
    stem_w = Tensor<T>::zeros({3, 3, s.in_channels, c0});
    he_normal_init(stem_w, 9 * s.in_channels, rng);
    stem_b = Tensor<T>::zeros({c0});
    stem_w.set_requires_grad();
    stem_b.set_requires_grad();
    int cin = c0;
    for (size_t si = 0; si < s.stages.size(); ++si) {
      const auto& st = s.stages[si];
      for (int b = 0; b < st.blocks; ++b) {
        ResidualBlock<T> blk;
        blk.init(cin, st.channels, b == 0 ? st.stride : 1, rng);
        blocks.push_back(std::move(blk));
        block_names.push_back("stage" + std::to_string(si + 1) + ".block" +
                              std::to_string(b + 1));
        cin = st.channels;
      }
    }
    head_w = Tensor<T>::zeros({cin, s.num_classes});
    he_normal_init(head_w, cin, rng);
    head_b = Tensor<T>::zeros({s.num_classes});
    head_w.set_requires_grad();
    head_b.set_requires_grad();
  }

  Tensor<T> forward_stem(const Tensor<T>& x) const {
    if (x.ndim() != 4 || x.dim(3) != spec.in_channels)
      throw ShapeError("classifier: expected [N,H,W," +
                       std::to_string(spec.in_channels) + "] input, got " +
                       shape_str(x.shape()));
    return gelu(conv2d(x, stem_w, stem_b, 1, 1));
  }

  Tensor<T> forward_blocks(Tensor<T> h, int from, int to) const {
    for (int i = from; i < to; ++i) h = blocks[static_cast<size_t>(i)].forward(h);
    return h;
  }

  Tensor<T> forward_head(const Tensor<T>& h) const {
    return linear(global_avg_pool(h), head_w, head_b);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return forward_head(forward_blocks(forward_stem(x), 0, static_cast<int>(blocks.size())));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + "stem.conv.weight", stem_w});
    out.push_back({prefix + "stem.conv.bias", stem_b});
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(prefix + block_names[i], out);
    out.push_back({prefix + "head.weight", head_w});
    out.push_back({prefix + "head.bias", head_b});
  }

  int64_t param_count_blocks(int from, int to) const {
    int64_t n = 0;
    for (int i = from; i < to; ++i) {
      ParamList<T> tmp;
      blocks[static_cast<size_t>(i)].collect("", tmp);
      for (auto& p : tmp) n += p.tensor.numel();
    }
    return n;
  }
};

// ---------------------------------------------------------------------------
// partition and split

template <class T>
PartitionPlan partition(const Classifier<T>& cls) {
  std::vector<int> sizes;
  for (const auto& st : cls.spec.stages) sizes.push_back(st.blocks);
  auto grouped = partition_stage_sizes(sizes);

  PartitionPlan plan;
  plan.total_blocks = static_cast<int>(cls.blocks.size());
  int64_t h = cls.spec.image_hw, w = cls.spec.image_hw;
  int block_id = 0;
  for (size_t si = 0; si < grouped.size(); ++si) {
    for (int gsize : grouped[si]) {
      ConvxGroup g;
      for (int b = 0; b < gsize; ++b) {
        const auto& blk = cls.blocks[static_cast<size_t>(block_id)];
        h = (h + 2 - 3) / blk.stride + 1;
        w = (w + 2 - 3) / blk.stride + 1;
        g.block_ids.push_back(block_id++);
      }
      g.channels = cls.blocks[static_cast<size_t>(g.block_ids.back())].out_ch;
      g.height = h;
      g.width = w;
      plan.groups.push_back(std::move(g));
    }
  }
  return plan;
}

inline SplitConfig split(const PartitionPlan& plan, int k) {
  const int n = plan.size();
  if (k < 1 || k > n)
    throw ConfigError("split: k=" + std::to_string(k) + " out of range [1, " +
                      std::to_string(n) + "]");
  SplitConfig sc;
  sc.k = k;
  for (int g = 0; g < k; ++g)
    sc.edge_blocks += static_cast<int>(plan.groups[static_cast<size_t>(g)].block_ids.size());
  const auto& last = plan.groups[static_cast<size_t>(k - 1)];
  sc.channels = last.channels;
  sc.height = last.height;
  sc.width = last.width;
  return sc;
}

// Edge front-end: stem plus the first k Convx groups.
template <class T>
Tensor<T> forward_edge(const Classifier<T>& cls, const SplitConfig& sc,
                       const Tensor<T>& x) {
  return cls.forward_blocks(cls.forward_stem(x), 0, sc.edge_blocks);
}

// Cloud back-end: remaining groups plus the classification head.
template <class T>
Tensor<T> forward_cloud(const Classifier<T>& cls, const SplitConfig& sc,
                        const Tensor<T>& f) {
  if (f.ndim() != 4 || f.dim(1) != sc.height || f.dim(2) != sc.width ||
      f.dim(3) != sc.channels)
    throw ShapeError("forward_cloud: expected split feature [N," +
                     std::to_string(sc.height) + "," + std::to_string(sc.width) +
                     "," + std::to_string(sc.channels) + "], got " +
                     shape_str(f.shape()));
  return cls.forward_head(
      cls.forward_blocks(f, sc.edge_blocks, static_cast<int>(cls.blocks.size())));
}

} // namespace vfc
