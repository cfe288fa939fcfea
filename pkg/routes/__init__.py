"""
Módulos del laboratorio de reuso temporal: cada archivo expone un Blueprint con sus comandos
"""
