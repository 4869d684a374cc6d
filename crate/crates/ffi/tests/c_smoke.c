#include <stdio.h>
#include <string.h>
#include "ctxsense.h"

static const char *CSV =
    "participant_id,event,phase,nn_mean,nn_sd,nn_rmssd,nn_prc20,nn_prc80,nn_lfn,nn_hfn,"
    "st_mean,acc_mean,acc_sd,scl_mean,scr_mean,scr_peaksn\n";

int main(void) {
    if (ctxsense_feature_count() != 13) return 10;
    if (strcmp(ctxsense_feature_name(0), "nn_mean") != 0) return 11;
    if (ctxsense_feature_name(13) != NULL) return 12;

    CtxFeatureMatrix *m = NULL;
    if (ctxsense_matrix_parse_csv("not,a,table\n1,2,3\n", &m) != CTX_STATUS_PARSE) return 13;
    if (ctxsense_last_error() == NULL) return 14;
    if (ctxsense_matrix_rows(NULL, NULL) != CTX_STATUS_NULL_POINTER) return 15;

    if (ctxsense_matrix_parse_csv(CSV, &m) != CTX_STATUS_OK) return 16;
    size_t rows = 99;
    if (ctxsense_matrix_rows(m, &rows) != CTX_STATUS_OK || rows != 0) return 17;
    char *json = NULL;
    if (ctxsense_analyze_task(m, "alone-social", NULL, &json) != CTX_STATUS_INSUFFICIENT_DATA) return 18;
    ctxsense_matrix_free(m);
    printf("ok %s\n", ctxsense_version());
    return 0;
}
