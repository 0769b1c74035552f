"""
Пакет прогнозування вільних місць на паркінгах.

Точка входу: app.main
"""
