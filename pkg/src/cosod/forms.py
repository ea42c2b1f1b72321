"""Names of the loss variants selectable from configuration (kept free of torch)."""

COOC_FORMS = ("log_softmax", "literal_ratio")
SAL_REDUCTIONS = ("weighted", "plain")
