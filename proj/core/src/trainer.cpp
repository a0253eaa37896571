#include "madcnn/trainer.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include "madcnn/error.hpp"
#include "madcnn/random.hpp"

namespace madcnn {

namespace {

// Neumaier summation: the result barely depends on the order of the terms.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0 || epochs == 0) throw ConfigError("batch size and epochs must be positive");
  if (!(learning_rate > 0.0) || !(epsilon > 0.0)) {
    throw ConfigError("learning rate and epsilon must be positive");
  }
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in (0, 1)");
  }
}

TrainResult train(const ModelConfig& config, std::span<const data::InputFrame> data,
                  const TrainConfig& tc, const EpochCallback& on_epoch) {
  tc.validate();
  if (data.empty()) throw InputError("train: no training frames");

  TrainResult result;
  result.params = build_model(config, tc.seed);
  ModelParameters& params = result.params;
  ModelParameters grads = zeros_like(params);

  auto param_tensors = tensors(params);
  auto grad_tensors = tensors(grads);
  std::vector<nn::AdamState> adam;
  adam.reserve(param_tensors.size());
  for (const auto& t : param_tensors) adam.emplace_back(t.values.size());
  const nn::AdamConfig adam_config = tc.adam();

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  ActivationCache cache;

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    Rng rng(derive_seed(tc.seed, 1000 + epoch));
    rng.shuffle(std::span<std::size_t>(order));

    CompensatedSum epoch_loss;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += tc.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + tc.batch_size);
      set_zero(grads);
      double batch_loss = 0.0;
      const auto where = [&] {
        return "epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(batch_index + 1);
      };
      try {
        for (std::size_t i = begin; i < end; ++i) {
          const data::InputFrame& frame = data[order[i]];
          forward(params, frame, cache);
          const double loss = backward(cache, frame.label, grads);
          batch_loss += loss;
          epoch_loss.add(loss);
        }
      } catch (const NumericError& e) {
        throw NumericError(where() + ": " + e.what());
      }
      if (!std::isfinite(batch_loss)) throw NumericError("non-finite loss at " + where());
      const double inv = 1.0 / static_cast<double>(end - begin);
      for (std::size_t t = 0; t < param_tensors.size(); ++t) {
        for (double& g : grad_tensors[t].values) g *= inv;
        nn::adam_step(param_tensors[t].values, grad_tensors[t].values, adam[t], adam_config);
      }
    }
    const double mean = epoch_loss.value() / static_cast<double>(data.size());
    result.loss_history.push_back(mean);
    if (on_epoch) on_epoch(epoch + 1, mean);
  }
  return result;
}

double evaluate_loss(const ModelParameters& params, std::span<const data::InputFrame> data) {
  if (data.empty()) throw InputError("evaluate_loss: no frames");
  ActivationCache cache;
  CompensatedSum total;
  for (const auto& frame : data) {
    const Prediction p = forward(params, frame, cache);
    total.add(nn::bce_loss(p.p_collision, frame.label));
  }
  return total.value() / static_cast<double>(data.size());
}

void write_loss_history(const std::filesystem::path& path, std::span<const double> history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "epoch,mean_loss\n";
  char buf[32];
  for (std::size_t i = 0; i < history.size(); ++i) {
    auto res = std::to_chars(buf, buf + sizeof buf, history[i]);
    out << (i + 1) << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf)) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<double> read_loss_history(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line != "epoch,mean_loss") {
    throw ParseError("bad loss history header", line_no);
  }
  std::vector<double> history;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError("expected 'epoch,mean_loss'", line_no);
    double v = 0.0;
    const char* first = line.data() + comma + 1;
    const char* last = line.data() + line.size();
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last) throw ParseError("malformed loss", line_no);
    history.push_back(v);
  }
  return history;
}

}  // namespace madcnn
