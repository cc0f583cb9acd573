# Services: tokenizer, corpus generation, training, transcription, labeling, metrics, pipeline orchestration
