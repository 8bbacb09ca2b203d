#include <cstdio>

int main() {
  // Placeholder until the pipeline commands land.
  std::printf("subseq\n");
  return 0;
}
