#include <stdio.h>
#include <stdlib.h>

#include "stripres.h"

static char *slurp(const char *path) {
  FILE *f = fopen(path, "rb");
  if (!f) return NULL;
  fseek(f, 0, SEEK_END);
  long n = ftell(f);
  fseek(f, 0, SEEK_SET);
  char *buf = malloc((size_t)n + 1);
  size_t got = fread(buf, 1, (size_t)n, f);
  buf[got] = '\0';
  fclose(f);
  return buf;
}

int main(int argc, char **argv) {
  if (argc < 2) return 64;
  char *cfg = slurp(argv[1]);
  if (!cfg) return 66;
  StripresRun *run = NULL;
  StripresStatus st = stripres_run_json(cfg, 1, &run);
  free(cfg);
  if (st != STRIPRES_STATUS_OK) {
    fprintf(stderr, "%s\n", stripres_last_error());
    return (int)st;
  }
  size_t entries = stripres_run_spacings(run);
  printf("N=%zu entries=%zu\n", stripres_run_bound_states(run), entries);
  for (size_t e = 0; e < entries; e++) {
    for (size_t i = 0; i < stripres_run_root_count(run, e); i++) {
      StripresRoot r;
      if (stripres_run_root(run, e, i, &r) != STRIPRES_STATUS_OK) return 70;
      printf("%zu %zu %.15e %.3e\n", e, i, r.re, r.im);
    }
  }
  stripres_run_free(run);
  return 0;
}
