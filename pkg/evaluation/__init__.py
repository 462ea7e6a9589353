# Evaluation framework
