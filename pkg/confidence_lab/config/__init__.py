# Configuration module for the confidence lab
