# Data models, record schemas, the encoder-decoder transformer and its checkpoint format
