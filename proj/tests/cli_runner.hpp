#pragma once

// Runs the trajret executable and captures its exit status and stdout.

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <string>

namespace cli {

struct Outcome {
  int status = -1;
  std::string out;
};

inline Outcome run(const std::string& args) {
  const std::string cmd = std::string(TRAJRET_CLI_PATH) + " " + args + " 2>/dev/null";
  Outcome o;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return o;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) o.out.append(buf.data(), n);
  const int raw = pclose(pipe);
  o.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return o;
}

// Flags for an encoder and protocol that finish in seconds.
inline std::string small_encoder_flags() {
  return "--dim 6 --backbone-widths 32,24 --projection-hidden 16 --trajectory-dim 8 --epochs 3 --lr 1e-3";
}

}  // namespace cli
