#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "subnewton.h"

#define CHECK(cond)                                                       \
  do {                                                                    \
    if (!(cond)) {                                                        \
      const char *m = sn_last_error_message();                            \
      fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, #cond,      \
              m ? m : "no message");                                       \
      return 1;                                                           \
    }                                                                     \
  } while (0)

int main(void) {
  SnDataset *ds = NULL;
  CHECK(sn_dataset_synthesize(2000, 5, 7, &ds) == SN_STATUS_OK);
  CHECK(sn_dataset_rows(ds) == 2000 && sn_dataset_cols(ds) == 5);

  SnObjective *obj = NULL;
  CHECK(sn_objective_new(ds, -1.0, &obj) == SN_STATUS_OK);
  sn_dataset_free(ds);

  double w_star[5], f_star = 0.0;
  CHECK(sn_objective_minimize(obj, w_star, &f_star) == SN_STATUS_OK);

  SnMethodConfig cfg = sn_method_config_default();
  cfg.hess_sample = 200;
  SnBudget budget = {50, 0.0, 1e-8};
  double w0[5] = {0};
  SnRunRecord *rec = NULL;
  CHECK(sn_run(obj, &cfg, &budget, w0, 1, &rec) == SN_STATUS_OK);
  CHECK(sn_run_record_status(rec) == SN_RUN_STATUS_TARGET_REACHED);
  size_t len = sn_run_record_len(rec);
  SnIterEntry last;
  CHECK(sn_run_record_entry(rec, len - 1, &last) == SN_STATUS_OK);
  CHECK(last.train_error <= 1e-8 && last.hvp_evals > 0);
  CHECK(sn_run_record_entry(rec, len, &last) == SN_STATUS_INVALID_ARGUMENT);
  sn_run_record_free(rec);

  CHECK(sn_objective_value(obj, NULL, &f_star) == SN_STATUS_NULL_POINTER);
  CHECK(sn_last_error_message() != NULL);
  sn_objective_free(obj);

  CHECK(fabs(sn_cg_worst_case_bound(9.0, 3) - 0.25) < 1e-15);
  printf("ok %s\n", sn_version());
  return 0;
}
