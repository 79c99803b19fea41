"""
Script de configuración rápida del reconocedor de estructura de tablas
"""

import importlib
import os
import shutil
import subprocess
import sys

# Mismos valores que config.env.example
DEFAULT_ENV = [
    ('TSR_STRIDE', '32'),
    ('TSR_NMS_THRESHOLD', '0.5'),
    ('TSR_CELL_IOU', '0.6'),
    ('TSR_GRID_IOU', '0.9'),
    ('TSR_FOCAL_GAMMA', '2.0'),
    ('TSR_FOCAL_ALPHA', '0.25'),
    ('TSR_SEED', '0'),
    ('SEMV3_THREADS', '1'),
    ('TSR_LOG_DIR', 'logs'),
    ('TSR_CONSOLE_LEVEL', 'INFO'),
    ('TSR_FULL_ACCEPTANCE', '0'),
]

# Módulo importable de cada dependencia de requirements.txt
REQUIRED_MODULES = ['numpy', 'pydantic', 'dotenv', 'zss', 'PIL']


def main():
    """Configuración automática del proyecto"""
    print("🚀 Configurando el reconocedor de estructura de tablas...")
    print()

    if sys.version_info < (3, 9):
        print("❌ Error: Se requiere Python 3.9 o superior")
        return False
    print("✅ Python version:", sys.version.split()[0])

    print("📦 Instalando dependencias...")
    try:
        subprocess.check_call([sys.executable, '-m', 'pip', 'install', '-r', 'requirements.txt'])
    except subprocess.CalledProcessError:
        print("❌ Error instalando dependencias")
        return False

    missing = [name for name in REQUIRED_MODULES if not _importable(name)]
    if missing:
        print(f"❌ Módulos no disponibles tras la instalación: {', '.join(missing)}")
        return False
    print("✅ Dependencias instaladas y verificadas")

    if os.path.exists('.env'):
        print("ℹ️  Archivo .env ya existe")
    elif os.path.exists('config.env.example'):
        shutil.copy('config.env.example', '.env')
        print("✅ Archivo .env creado desde ejemplo")
    else:
        create_env_file()

    os.makedirs(os.getenv('TSR_LOG_DIR', 'logs'), exist_ok=True)
    os.makedirs('data', exist_ok=True)
    print("📁 Directorios logs/ y data/ listos")

    print()
    print("🎉 ¡Configuración completada!")
    print()
    print("📋 Próximos pasos:")
    print("1. Genera datos: python tsr_cli.py syngen --n 10 --out data/gt")
    print("2. Decodifica:   python tsr_cli.py decode --bundle data/gt --out data/pred")
    print("3. Evalúa:       python tsr_cli.py eval --pred data/pred --gt data/gt")
    print("4. Pruebas:      python -m unittest discover -p 'test_*.py'")
    print()

    return True


def _importable(name: str) -> bool:
    try:
        importlib.import_module(name)
        return True
    except ImportError:
        return False


def create_env_file():
    """Crea archivo .env básico"""
    lines = ["# Configuración del reconocedor de estructura de tablas"]
    lines += [f"{key}={value}" for key, value in DEFAULT_ENV]
    with open('.env', 'w', encoding='utf-8') as f:
        f.write('\n'.join(lines) + '\n')
    print("✅ Archivo .env creado")


if __name__ == "__main__":
    main()
