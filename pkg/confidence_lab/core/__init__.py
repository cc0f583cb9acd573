# Numerical core: tensors with reverse-mode gradients, optimizer, errors
