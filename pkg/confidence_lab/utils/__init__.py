# Utilities: logging setup and line-delimited record storage
